#include <gtest/gtest.h>

#include <functional>

#include "aeon/autodiff.hpp"
#include "test_util.hpp"

using aeon::Matrix;
namespace ad = aeon::ad;

namespace {

using UnaryGraph = std::function<ad::Var(const ad::Var&)>;

// Builds graph(x) with x a leaf, reduces to a scalar by a fixed random
// weighting, and compares the tape gradient with central differences.
double op_gradient_error(const UnaryGraph& graph, const Matrix& x0, std::uint64_t seed = 7) {
    ad::Tape probe;
    const Matrix out_shape = graph(probe.constant(x0)).value();
    const Matrix weights = testutil::random_matrix(static_cast<int>(out_shape.rows()), static_cast<int>(out_shape.cols()), seed);

    auto value_at = [&](const Eigen::VectorXd& flat) {
        ad::Tape t;
        Matrix x = Eigen::Map<const Matrix>(flat.data(), x0.rows(), x0.cols());
        return ad::sum(ad::mul(graph(t.constant(x)), t.constant(weights))).scalar();
    };

    ad::Tape t;
    ad::Var x = t.leaf(x0);
    t.backward(ad::sum(ad::mul(graph(x), t.constant(weights))));
    Matrix g = x.grad();
    Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(x0.data(), x0.size());
    Eigen::VectorXd grad = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
    return testutil::max_fd_error(value_at, flat, grad);
}

} // namespace

TEST(Autodiff, LeafAndConstantFlags) {
    ad::Tape t;
    ad::Var a = t.leaf(Matrix::Ones(2, 2));
    ad::Var c = t.constant(Matrix::Ones(2, 2));
    EXPECT_TRUE(a.requires_grad());
    EXPECT_FALSE(c.requires_grad());
    EXPECT_TRUE(ad::add(a, c).requires_grad());
    EXPECT_FALSE(ad::add(c, c).requires_grad());
}

TEST(Autodiff, ScalarProductRule) {
    ad::Tape t;
    ad::Var x = t.leaf(Matrix::Constant(1, 1, 3.0));
    ad::Var y = t.leaf(Matrix::Constant(1, 1, -2.0));
    ad::Var f = x * y + ad::exp(x);
    t.backward(f);
    EXPECT_NEAR(x.grad()(0, 0), -2.0 + std::exp(3.0), 1e-12);
    EXPECT_NEAR(y.grad()(0, 0), 3.0, 1e-15);
}

TEST(Autodiff, GradientAccumulatesOnReuse) {
    ad::Tape t;
    ad::Var x = t.leaf(Matrix::Constant(1, 1, 1.5));
    ad::Var f = x * x * x;  // x used three times
    t.backward(f);
    EXPECT_NEAR(x.grad()(0, 0), 3 * 1.5 * 1.5, 1e-14);
}

TEST(Autodiff, BackwardTwiceAccumulatesUntilZeroGrad) {
    ad::Tape t;
    ad::Var x = t.leaf(Matrix::Constant(1, 1, 2.0));
    ad::Var f = ad::square(x);
    t.backward(f);
    t.backward(f);
    EXPECT_NEAR(x.grad()(0, 0), 8.0, 1e-15);
    t.zero_grad();
    t.backward(f);
    EXPECT_NEAR(x.grad()(0, 0), 4.0, 1e-15);
}

TEST(Autodiff, BackwardRequiresScalarRoot) {
    ad::Tape t;
    ad::Var x = t.leaf(Matrix::Ones(2, 1));
    EXPECT_THROW(t.backward(x), aeon::StructuralError);
}

TEST(Autodiff, MixingTapesIsRejected) {
    ad::Tape a, b;
    ad::Var x = a.leaf(Matrix::Ones(1, 1));
    ad::Var y = b.leaf(Matrix::Ones(1, 1));
    EXPECT_THROW(ad::add(x, y), aeon::StructuralError);
}

TEST(Autodiff, DetachBlocksGradient) {
    ad::Tape t;
    ad::Var x = t.leaf(Matrix::Constant(1, 1, 2.0));
    ad::Var f = x * ad::detach(x);
    t.backward(f);
    EXPECT_NEAR(x.grad()(0, 0), 2.0, 1e-15);
}

TEST(Autodiff, BroadcastShapes) {
    ad::Tape t;
    ad::Var m = t.leaf(testutil::random_matrix(3, 4, 1));
    ad::Var row = t.leaf(testutil::random_matrix(1, 4, 2));
    ad::Var col = t.leaf(testutil::random_matrix(3, 1, 3));
    ad::Var s = t.leaf(Matrix::Constant(1, 1, 0.5));
    ad::Var f = ad::sum(ad::mul(ad::add(ad::sub(m, row), col), s));
    t.backward(f);
    EXPECT_EQ(row.grad().rows(), 1);
    EXPECT_EQ(row.grad().cols(), 4);
    EXPECT_NEAR(row.grad()(0, 0), -1.5, 1e-15);  // 3 rows x (-1) x 0.5
    EXPECT_NEAR(col.grad()(0, 0), 2.0, 1e-15);   // 4 cols x 0.5
    EXPECT_THROW(ad::add(m, t.constant(Matrix::Ones(2, 4))), aeon::StructuralError);
}

TEST(Autodiff, DomainErrors) {
    ad::Tape t;
    EXPECT_THROW(ad::log(t.constant(Matrix::Constant(1, 1, 0.0))), aeon::DomainError);
    EXPECT_THROW(ad::erfinv(t.constant(Matrix::Constant(1, 1, 1.0))), aeon::DomainError);
    EXPECT_THROW(ad::pow(t.constant(Matrix::Constant(1, 1, -1.0)), 0.5), aeon::DomainError);
    Matrix bad = Matrix::Zero(1, 2);
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(ad::exp(t.constant(bad)), aeon::DomainError);
}

TEST(Autodiff, LogsumexpIsOverflowStable) {
    ad::Tape t;
    Matrix x(1, 3);
    x << 1000.0, 1000.0, 1000.0;
    EXPECT_NEAR(ad::logsumexp(t.constant(x)).scalar(), 1000.0 + std::log(3.0), 1e-12);
    Matrix y(2, 2);
    y << -1000.0, -1000.0, 0.0, 0.0;
    Matrix r = ad::logsumexp_rows(t.constant(y)).value();
    EXPECT_NEAR(r(0, 0), -1000.0 + std::log(2.0), 1e-12);
    EXPECT_NEAR(r(1, 0), std::log(2.0), 1e-15);
}

TEST(Autodiff, MaskedLogsumexpUsesOnlyActiveEntries) {
    ad::Tape t;
    Matrix x(1, 3);
    x << 1.0, 2.0, 3.0;
    Matrix mask(1, 3);
    mask << 1.0, 0.0, 1.0;
    EXPECT_NEAR(ad::logsumexp_rows(t.constant(x), mask).value()(0, 0), std::log(std::exp(1.0) + std::exp(3.0)), 1e-14);
    EXPECT_THROW(ad::logsumexp_rows(t.constant(x), Matrix::Zero(1, 3)), aeon::StructuralError);
}

TEST(Autodiff, L2NormalizedRowsHaveUnitNorm) {
    ad::Tape t;
    Matrix n = ad::l2_normalize_rows(t.constant(testutil::random_matrix(5, 7, 4, 10.0))).value();
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(n.row(i).norm(), 1.0, 1e-12);
}

TEST(Autodiff, ClampPassesGradientOnlyInside) {
    ad::Tape t;
    Matrix x(1, 3);
    x << -2.0, 0.5, 3.0;
    ad::Var v = t.leaf(x);
    t.backward(ad::sum(ad::clamp(v, 0.0, 1.0)));
    EXPECT_EQ(v.grad()(0, 0), 0.0);
    EXPECT_EQ(v.grad()(0, 1), 1.0);
    EXPECT_EQ(v.grad()(0, 2), 0.0);
}

TEST(Autodiff, BackwardIsLinear) {
    const Matrix x0 = testutil::random_matrix(3, 4, 21);
    auto grad_of = [&](double a, double b) {
        ad::Tape t;
        ad::Var x = t.leaf(x0);
        ad::Var f = ad::logsumexp(ad::mul(x, x));
        ad::Var g = ad::sum(ad::tanh(x));
        t.backward(ad::add(ad::scale(f, a), ad::scale(g, b)));
        return Matrix(x.grad());
    };
    const Matrix gf = grad_of(1.0, 0.0), gg = grad_of(0.0, 1.0);
    const Matrix combined = grad_of(2.5, -0.75);
    EXPECT_LT((combined - (2.5 * gf - 0.75 * gg)).cwiseAbs().maxCoeff(), 1e-14);
}

// Every differentiable primitive against central differences, on 108 random
// interior points per primitive (9 draws of a 3x4 input).
struct OpCase {
    const char* name;
    UnaryGraph graph;
    std::function<Matrix(std::uint64_t)> input;
};

class OpGradient : public ::testing::TestWithParam<int> {};

std::vector<OpCase> op_cases() {
    auto x = [](std::uint64_t s) { return testutil::random_matrix(3, 4, s); };
    auto pos = [](std::uint64_t s) { return Matrix(testutil::random_matrix(3, 4, s).array().abs() + 0.5); };
    auto unit = [](std::uint64_t s) { return Matrix(testutil::random_matrix(3, 4, s).array().tanh() * 0.9); };
    auto sq = [](std::uint64_t s) { return testutil::random_matrix(4, 4, s); };
    const Matrix other = testutil::random_matrix(4, 5, 13);
    return {
        {"exp", [](const ad::Var& a) { return ad::exp(a); }, x},
        {"log", [](const ad::Var& a) { return ad::log(a); }, pos},
        {"pow", [](const ad::Var& a) { return ad::pow(a, 1.7); }, pos},
        {"square", [](const ad::Var& a) { return ad::square(a); }, x},
        {"max0", [](const ad::Var& a) { return ad::max0(a); }, x},
        {"leaky_relu", [](const ad::Var& a) { return ad::leaky_relu(a, 0.1); }, x},
        {"sigmoid", [](const ad::Var& a) { return ad::sigmoid(a); }, x},
        {"tanh", [](const ad::Var& a) { return ad::tanh(a); }, x},
        {"erfinv", [](const ad::Var& a) { return ad::erfinv(a); }, unit},
        {"neg_scale_shift", [](const ad::Var& a) { return 2.0 - ad::scale(-a, 3.0); }, x},
        {"self_mul", [](const ad::Var& a) { return ad::mul(a, ad::sigmoid(a)); }, x},
        {"sum_rows", [](const ad::Var& a) { return ad::sum_rows(a); }, x},
        {"mean", [](const ad::Var& a) { return ad::mean(a); }, x},
        {"logsumexp", [](const ad::Var& a) { return ad::logsumexp(a); }, x},
        {"logsumexp_rows", [](const ad::Var& a) { return ad::logsumexp_rows(a); }, x},
        {"log_softmax_rows", [](const ad::Var& a) { return ad::log_softmax_rows(a); }, x},
        {"matmul_left", [other](const ad::Var& a) { return ad::matmul(a, a.tape()->constant(other)); }, sq},
        {"matmul_self", [](const ad::Var& a) { return ad::matmul(a, ad::transpose(a)); }, x},
        {"diag", [](const ad::Var& a) { return ad::diag(a); }, sq},
        {"l2_normalize_rows", [](const ad::Var& a) { return ad::l2_normalize_rows(a); }, x},
        {"dot", [](const ad::Var& a) { return ad::dot(a, ad::exp(a)); }, x},
        {"broadcast_col", [](const ad::Var& a) { return ad::sub(a, ad::logsumexp_rows(a)); }, x},
    };
}

TEST_P(OpGradient, MatchesCentralDifferences) {
    const OpCase c = op_cases()[static_cast<std::size_t>(GetParam())];
    for (std::uint64_t seed = 100; seed < 109; ++seed) {
        EXPECT_LT(op_gradient_error(c.graph, c.input(seed), seed + 1000), 1e-6) << c.name << " seed " << seed;
    }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range(0, static_cast<int>(op_cases().size())),
                         [](const ::testing::TestParamInfo<int>& info) {
                             return std::string(op_cases()[static_cast<std::size_t>(info.param)].name);
                         });
